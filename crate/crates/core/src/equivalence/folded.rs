//! Tests whose critical values come from the folded normal law.

use super::{check_alpha, check_threshold, CriticalValue, Diagnostics, TestKind, TestResult};
use crate::covariance::CovEstimate;
use crate::dist::{folded_minimal_threshold, folded_normal_quantile};
use crate::error::{Error, Result};
use crate::panel::PretrendFit;

/// Critical value `Q_{N_F(threshold, se^2)}(alpha)`; a point mass at the
/// threshold when `se = 0`.
fn critical(threshold: f64, se: f64, alpha: f64) -> Result<f64> {
    if se == 0.0 {
        Ok(threshold)
    } else {
        folded_normal_quantile(threshold, se, alpha)
    }
}

fn check_conformable(fit: &PretrendFit, cov: &CovEstimate) -> Result<()> {
    let t = fit.dim();
    if cov.sigma_hat.shape() != (t, t) {
        return Err(Error::validation(format!(
            "covariance is {:?}, fit has {t} tested coefficients",
            cov.sigma_hat.shape()
        )));
    }
    Ok(())
}

/// Intersection-union test: every coordinate test
/// `|beta_hat_t| < Q_{N_F(delta, Sigma_tt/n)}(alpha)` must reject.
pub fn iu_max_test(fit: &PretrendFit, cov: &CovEstimate, delta: f64, alpha: f64) -> Result<TestResult> {
    check_threshold(delta)?;
    check_alpha(alpha)?;
    check_conformable(fit, cov)?;
    let se = cov.standard_errors(fit.n);
    let mut crit = Vec::with_capacity(fit.dim());
    let mut margins = Vec::with_capacity(fit.dim());
    let mut minimal: f64 = 0.0;
    for t in 0..fit.dim() {
        let b = fit.beta_hat[t].abs();
        let c = critical(delta, se[t], alpha)?;
        crit.push(c);
        margins.push(c - b);
        minimal = minimal.max(folded_minimal_threshold(b, se[t], alpha)?);
    }
    Ok(TestResult {
        kind: TestKind::IuMax,
        statistic: fit.beta_hat.amax(),
        reject: margins.iter().all(|&m| m > 0.0),
        critical_value: CriticalValue::PerCoordinate(crit),
        threshold: delta,
        alpha,
        minimal_threshold: Some(minimal),
        diagnostics: Diagnostics { margins: Some(margins), ..Diagnostics::default() },
    })
}

/// Test on the average placebo effect `mean(beta)` with variance
/// `1' Sigma 1 / (T^2 n)`.
pub fn mean_test(fit: &PretrendFit, cov: &CovEstimate, tau: f64, alpha: f64) -> Result<TestResult> {
    check_threshold(tau)?;
    check_alpha(alpha)?;
    check_conformable(fit, cov)?;
    let t = fit.dim() as f64;
    let mean = fit.beta_hat.sum() / t;
    let var = cov.sigma_hat.sum() / (t * t * fit.n as f64);
    let se = var.max(0.0).sqrt();
    let c = critical(tau, se, alpha)?;
    Ok(TestResult {
        kind: TestKind::Mean,
        statistic: mean,
        reject: mean.abs() < c,
        critical_value: CriticalValue::Scalar(c),
        threshold: tau,
        alpha,
        minimal_threshold: Some(folded_minimal_threshold(mean, se, alpha)?),
        diagnostics: Diagnostics { standard_error: Some(se), ..Diagnostics::default() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::cluster_robust_cov;
    use crate::panel::{fit_pretrend, PanelDataset};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel(n: usize, periods: usize, seed: u64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(n, periods, |_, _| rng.random_range(-1.0..1.0));
        PanelDataset::canonical(y, (0..n).map(|i| i % 3 == 0).collect(), periods - 1).unwrap()
    }

    #[test]
    fn single_period_iu_and_mean_coincide() {
        for seed in 0..10 {
            let fit = fit_pretrend(&panel(30, 2, seed)).unwrap();
            let cov = cluster_robust_cov(&fit).unwrap();
            for x in [0.05, 0.1, 0.2, 0.5] {
                let iu = iu_max_test(&fit, &cov, x, 0.05).unwrap();
                let mean = mean_test(&fit, &cov, x, 0.05).unwrap();
                assert_eq!(iu.reject, mean.reject);
                let (a, b) = (iu.minimal_threshold.unwrap(), mean.minimal_threshold.unwrap());
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn minimal_thresholds_bracket_the_decision() {
        for seed in 0..10 {
            let fit = fit_pretrend(&panel(40, 4, seed)).unwrap();
            let cov = cluster_robust_cov(&fit).unwrap();
            let iu = iu_max_test(&fit, &cov, 1.0, 0.05).unwrap().minimal_threshold.unwrap();
            assert!(iu_max_test(&fit, &cov, iu + 1e-6, 0.05).unwrap().reject);
            assert!(!iu_max_test(&fit, &cov, iu - 1e-6, 0.05).unwrap().reject);
            let m = mean_test(&fit, &cov, 1.0, 0.05).unwrap().minimal_threshold.unwrap();
            assert!(mean_test(&fit, &cov, m + 1e-6, 0.05).unwrap().reject);
            if m > 1e-6 {
                assert!(!mean_test(&fit, &cov, m - 1e-6, 0.05).unwrap().reject);
            }
        }
    }

    #[test]
    fn mismatched_covariance_and_bad_threshold_are_errors() {
        let fit = fit_pretrend(&panel(20, 4, 1)).unwrap();
        let cov = cluster_robust_cov(&fit_pretrend(&panel(20, 3, 1)).unwrap()).unwrap();
        assert!(iu_max_test(&fit, &cov, 1.0, 0.05).is_err());
        let cov = cluster_robust_cov(&fit).unwrap();
        assert!(mean_test(&fit, &cov, 0.0, 0.05).is_err());
        assert!(iu_max_test(&fit, &cov, -1.0, 0.05).is_err());
    }
}
