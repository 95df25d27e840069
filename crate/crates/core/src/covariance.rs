//! Variance estimators for the placebo coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PretrendFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovFlavor {
    ClusterRobust,
    Spherical,
}

/// Estimated asymptotic covariance of `sqrt(n) (beta_hat - beta)` for the
/// tested coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovEstimate {
    pub sigma_hat: DMatrix<f64>,
    pub flavor: CovFlavor,
    /// Set when the design used estimated quantities (cohort covariate means)
    /// whose sampling variation is not accounted for.
    pub unadjusted: bool,
}

impl CovEstimate {
    /// Standard errors of the tested coefficients, `sqrt(Sigma_tt / n)`.
    pub fn standard_errors(&self, n: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.sigma_hat.nrows(),
            self.sigma_hat.diagonal().iter().map(|v| (v.max(0.0) / n as f64).sqrt()),
        )
    }
}

/// Cluster-robust (by unit) sandwich `G^-1 [(1/n) sum_i s_i s_i'] G^-1` with
/// `s_i = W_i' u_i`, restricted to the tested coefficients. No small-sample
/// correction is applied.
pub fn cluster_robust_cov(fit: &PretrendFit) -> Result<CovEstimate> {
    if fit.n <= fit.dim() {
        return Err(Error::validation(format!(
            "cluster covariance needs more units ({}) than tested coefficients ({})",
            fit.n,
            fit.dim()
        )));
    }
    let scores = fit.unit_scores(&fit.residuals);
    let meat = scores.tr_mul(&scores) / fit.n as f64;
    let bread = fit.tested_rows(&fit.gram_inv);
    let mut sigma = &bread * meat * bread.transpose();
    symmetrize(&mut sigma);
    Ok(CovEstimate { sigma_hat: sigma, flavor: CovFlavor::ClusterRobust, unadjusted: false })
}

/// Spherical error variance `SSR(c) / ((n - 1)(P - 1))` at the full
/// coefficient vector `c`; with `P = T + 1` periods the divisor is `(n-1)T`.
pub fn spherical_sigma(fit: &PretrendFit, beta_ref: &DVector<f64>) -> Result<f64> {
    if beta_ref.len() != fit.coef.len() {
        return Err(Error::validation(format!(
            "reference coefficient vector has length {}, model has {}",
            beta_ref.len(),
            fit.coef.len()
        )));
    }
    let ssr = fit.residuals_at(beta_ref).norm_squared();
    Ok(ssr / ((fit.n - 1) * (fit.periods - 1)) as f64)
}

/// Spherical covariance `sigma^2 G^-1` of the tested coefficients at `beta_ref`.
pub fn spherical_cov(fit: &PretrendFit, beta_ref: &DVector<f64>) -> Result<CovEstimate> {
    let s2 = spherical_sigma(fit, beta_ref)?;
    Ok(CovEstimate { sigma_hat: fit.tested_block(&fit.gram_inv) * s2, flavor: CovFlavor::Spherical, unadjusted: false })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for a in 0..k {
        for b in 0..a {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{fit_pretrend, PanelDataset};

    fn fixed_panel() -> PanelDataset {
        let y = DMatrix::from_row_slice(
            5,
            3,
            &[
                1.0, 2.5, 0.3, //
                -0.4, 1.1, 2.0, //
                0.9, -1.2, 0.5, //
                2.2, 0.1, -0.7, //
                0.0, 1.7, 1.3,
            ],
        );
        PanelDataset::canonical(y, vec![true, false, true, false, true], 2).unwrap()
    }

    #[test]
    fn sandwich_matches_triple_loop() {
        let fit = fit_pretrend(&fixed_panel()).unwrap();
        let cov = cluster_robust_cov(&fit).unwrap();
        let (n, p, k) = (fit.n, fit.periods, fit.coef.len());
        let mut meat = DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            for a in 0..k {
                for b in 0..k {
                    let mut sa = 0.0;
                    let mut sb = 0.0;
                    for t in 0..p {
                        sa += fit.demeaned.ddw[(i * p + t, a)] * fit.residuals[(i, t)];
                        sb += fit.demeaned.ddw[(i * p + t, b)] * fit.residuals[(i, t)];
                    }
                    meat[(a, b)] += sa * sb / n as f64;
                }
            }
        }
        let g_inv = fit.gram.clone().try_inverse().unwrap();
        let oracle = &g_inv * meat * &g_inv;
        assert!((cov.sigma_hat - oracle).amax() < 1e-10);
    }

    #[test]
    fn zero_residuals_give_zero_covariance() {
        let y = DMatrix::from_fn(6, 3, |i, t| i as f64 + 2.0 * t as f64);
        let ds = PanelDataset::canonical(y, vec![true, false, true, false, true, false], 2).unwrap();
        let fit = fit_pretrend(&ds).unwrap();
        let cov = cluster_robust_cov(&fit).unwrap();
        assert!(cov.sigma_hat.amax() < 1e-20);
        assert!(spherical_sigma(&fit, &fit.coef).unwrap() < 1e-20);
    }

    #[test]
    fn spherical_matches_direct_sum() {
        // n = 3, T = 1
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 3.0, 2.0, -1.0, 0.5, 0.25]);
        let ds = PanelDataset::canonical(y.clone(), vec![true, false, false], 1).unwrap();
        let fit = fit_pretrend(&ds).unwrap();
        let b = DVector::from_element(1, 0.4);
        // demeaned outcomes and regressor by hand
        let tm: Vec<f64> = (0..2).map(|t| (0..3).map(|i| y[(i, t)]).sum::<f64>() / 3.0).collect();
        let gm = (tm[0] + tm[1]) / 2.0;
        let g = [1.0, 0.0, 0.0];
        let gbar = 1.0 / 3.0;
        let mut ssr = 0.0;
        for i in 0..3 {
            let um = (y[(i, 0)] + y[(i, 1)]) / 2.0;
            for t in 0..2 {
                let ddy = y[(i, t)] - um - tm[t] + gm;
                let w = if t == 0 { g[i] } else { 0.0 };
                let ddw = w - g[i] / 2.0 - if t == 0 { gbar } else { 0.0 } + gbar / 2.0;
                ssr += (ddy - ddw * 0.4).powi(2);
            }
        }
        let s = spherical_sigma(&fit, &b).unwrap();
        assert!((s - ssr / 2.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_outcomes_scales_covariance() {
        let ds = fixed_panel();
        let fit = fit_pretrend(&ds).unwrap();
        let scaled = ds.with_outcomes(ds.outcomes() * 3.0).unwrap();
        let fit3 = fit_pretrend(&scaled).unwrap();
        let a = cluster_robust_cov(&fit).unwrap().sigma_hat;
        let b = cluster_robust_cov(&fit3).unwrap().sigma_hat;
        assert!((a * 9.0 - b).amax() < 1e-10);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let fit = fit_pretrend(&fixed_panel()).unwrap();
        assert!(spherical_sigma(&fit, &DVector::zeros(5)).is_err());
    }
}
