//! Parametric and wild cluster bootstrap for the maximum placebo effect.
//!
//! Because the estimator is linear in the outcomes, a bootstrap refit is
//! `c + G^-1 (1/n) sum_i W_i' u_i*` where `c` is the (constrained) centre and
//! `u*` the resampled errors. Both variants work directly with that
//! representation:
//!
//! * Gaussian: `u*` iid `N(0, s2)` in every cell makes the tested block
//!   exactly `N(c_t, s2 (G^-1)_tt / n)`, drawn through its Cholesky factor.
//! * Wild cluster: `u*_i = R_i u_i` with Rademacher `R_i`, so the refit is
//!   `c_t + sum_i R_i v_i` with per-unit contributions `v_i`. The signed sums
//!   are assembled from 256-entry lookup tables over blocks of eight units.
//!
//! Draw `b` always uses RNG stream `b`, so results do not depend on the
//! thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::constrained::ConstrainedProblem;
use super::threshold::{bisect_minimal_threshold, upper_interval_threshold, SearchConfig};
use super::{check_threshold, CriticalValue, Diagnostics, TestKind, TestResult};
use crate::covariance::spherical_sigma;
use crate::dist::empirical_quantile;
use crate::error::{Error, Result};
use crate::exec::{derive_seed, stream_rng, Execution};
use crate::panel::PretrendFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapVariant {
    Gaussian,
    WildCluster,
}

impl BootstrapVariant {
    fn kind(self) -> TestKind {
        match self {
            BootstrapVariant::Gaussian => TestKind::BootMax,
            BootstrapVariant::WildCluster => TestKind::ClusterBootMax,
        }
    }
}

impl std::str::FromStr for BootstrapVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(BootstrapVariant::Gaussian),
            "wild" | "wild_cluster" | "cluster" => Ok(BootstrapVariant::WildCluster),
            other => Err(Error::validation(format!(
                "unknown bootstrap variant '{other}' (expected gaussian or wild_cluster)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b: usize,
    pub variant: BootstrapVariant,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Execution,
    /// Reuse the same draws for every threshold. Needed for a monotone
    /// threshold search.
    pub common_random_numbers: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b: 1000,
            variant: BootstrapVariant::WildCluster,
            seed: 0,
            exec: Execution::default(),
            common_random_numbers: true,
        }
    }
}

const MIN_B: usize = 500;

enum Draws {
    /// `B x T`, row `b` holds `chol((G^-1)_tt) z_b`.
    Gaussian(DMatrix<f64>),
    /// `B` rows of `ceil(n/8)` Rademacher bytes (bit set = +1).
    Signs(Vec<Vec<u8>>),
}

/// Bootstrap state for one fit: the profiled constrained problem and the
/// cached random draws.
pub struct BootstrapEngine<'a> {
    fit: &'a PretrendFit,
    cfg: BootstrapConfig,
    problem: ConstrainedProblem,
    chol_tt: DMatrix<f64>,
    s_rows: DMatrix<f64>,
    draws: Option<Draws>,
}

impl<'a> BootstrapEngine<'a> {
    pub fn new(fit: &'a PretrendFit, cfg: BootstrapConfig) -> Result<Self> {
        if cfg.b < MIN_B {
            return Err(Error::validation(format!("{} bootstrap draws are too few; use at least {MIN_B}", cfg.b)));
        }
        let s_tt = fit.tested_block(&fit.gram_inv);
        let chol_tt = s_tt
            .cholesky()
            .ok_or_else(|| Error::Numerical("tested covariance block is not positive definite".into()))?
            .unpack();
        let mut engine = BootstrapEngine {
            fit,
            cfg,
            problem: ConstrainedProblem::new(fit)?,
            chol_tt,
            s_rows: fit.tested_rows(&fit.gram_inv),
            draws: None,
        };
        if cfg.common_random_numbers {
            engine.draws = Some(engine.make_draws(cfg.seed));
        }
        Ok(engine)
    }

    pub fn config(&self) -> &BootstrapConfig {
        &self.cfg
    }

    fn make_draws(&self, seed: u64) -> Draws {
        let b = self.cfg.b;
        match self.cfg.variant {
            BootstrapVariant::Gaussian => {
                let t = self.fit.dim();
                let l = &self.chol_tt;
                let rows = self.cfg.exec.map(b, |k| {
                    let mut rng = stream_rng(seed, k as u64);
                    let z = DVector::<f64>::from_fn(t, |_, _| rng.sample(StandardNormal));
                    l * z
                });
                Draws::Gaussian(DMatrix::from_fn(b, t, |k, j| rows[k][j]))
            }
            BootstrapVariant::WildCluster => {
                let bytes = self.fit.n.div_ceil(8);
                Draws::Signs(self.cfg.exec.map(b, |k| {
                    let mut buf = vec![0u8; bytes];
                    stream_rng(seed, k as u64).fill_bytes(&mut buf);
                    buf
                }))
            }
        }
    }

    /// Centre of the bootstrap world: the unconstrained estimate when it
    /// already violates the threshold, otherwise the constrained estimate.
    /// Returns the tested and the full coefficient vector.
    pub fn centre(&self, delta: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        if self.fit.beta_hat.amax() >= delta {
            Ok((self.fit.beta_hat.clone(), self.fit.coef.clone()))
        } else {
            self.problem.solve(delta)
        }
    }

    /// Sorted bootstrap max-norms `||beta_b||_inf` at threshold `delta`.
    pub fn max_norms(&self, delta: f64) -> Result<Vec<f64>> {
        let owned;
        let draws = match &self.draws {
            Some(d) => d,
            None => {
                owned = self.make_draws(derive_seed(self.cfg.seed, delta.to_bits()));
                &owned
            }
        };
        let (centre, full) = self.centre(delta)?;
        let t = centre.len();
        let mut norms = match draws {
            Draws::Gaussian(y) => {
                let scale = (spherical_sigma(self.fit, &full)? / self.fit.n as f64).sqrt();
                self.cfg
                    .exec
                    .map(y.nrows(), |k| (0..t).map(|j| (centre[j] + scale * y[(k, j)]).abs()).fold(0.0, f64::max))
            }
            Draws::Signs(signs) => {
                let tables = self.sign_tables(&full);
                self.cfg.exec.map(signs.len(), |k| {
                    let mut acc = centre.as_slice().to_vec();
                    for (block, &byte) in signs[k].iter().enumerate() {
                        let row = &tables[(block * 256 + byte as usize) * t..][..t];
                        acc.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    acc.iter().map(|v| v.abs()).fold(0.0, f64::max)
                })
            }
        };
        norms.sort_unstable_by(f64::total_cmp);
        Ok(norms)
    }

    /// Per-unit contributions `v_i = (G^-1 W_i' u_i)_t / n` at the full
    /// coefficient vector `coef`, one row per unit.
    pub(crate) fn wild_contributions(&self, coef: &DVector<f64>) -> DMatrix<f64> {
        let u = self.fit.residuals_at(coef);
        let scores = self.fit.unit_scores(&u);
        scores * self.s_rows.transpose() / self.fit.n as f64
    }

    /// For each block of eight units and each sign pattern, the signed sum of
    /// their contributions. Layout: `[(block * 256 + pattern) * T + t]`.
    fn sign_tables(&self, coef: &DVector<f64>) -> Vec<f64> {
        let v = self.wild_contributions(coef);
        let (n, t) = (v.nrows(), v.ncols());
        let blocks = n.div_ceil(8);
        let mut tables = vec![0.0; blocks * 256 * t];
        for block in 0..blocks {
            let base = block * 256 * t;
            let units: Vec<usize> = (block * 8..(block * 8 + 8).min(n)).collect();
            for j in 0..t {
                tables[base + j] = -units.iter().map(|&i| v[(i, j)]).sum::<f64>();
            }
            for pattern in 1..256usize {
                let low = pattern.trailing_zeros() as usize;
                let prev = pattern & (pattern - 1);
                for j in 0..t {
                    let flip = units.get(low).map_or(0.0, |&i| 2.0 * v[(i, j)]);
                    tables[base + pattern * t + j] = tables[base + prev * t + j] + flip;
                }
            }
        }
        tables
    }

    /// Bootstrap critical value `Q*_alpha` at threshold `delta`.
    pub fn critical_value(&self, delta: f64, alpha: f64) -> Result<f64> {
        Ok(empirical_quantile(&self.max_norms(delta)?, alpha))
    }

    pub fn test(&self, delta: f64, alpha: f64) -> Result<TestResult> {
        check_threshold(delta)?;
        check_boot_alpha(alpha)?;
        let q = self.critical_value(delta, alpha)?;
        let stat = self.fit.beta_hat.amax();
        Ok(TestResult {
            kind: self.cfg.variant.kind(),
            statistic: stat,
            critical_value: CriticalValue::Scalar(q),
            threshold: delta,
            alpha,
            reject: stat < q,
            minimal_threshold: None,
            diagnostics: Diagnostics {
                bootstrap_b: Some(self.cfg.b),
                bootstrap_seed: Some(self.cfg.seed),
                ..Diagnostics::default()
            },
        })
    }

    /// Smallest threshold at which the bootstrap test rejects. Below
    /// `||beta_hat||_inf` the bootstrap world does not depend on the
    /// threshold, so the search starts there.
    ///
    /// With a finite number of draws the critical value is a slightly
    /// jagged function of the threshold even under common random numbers,
    /// so the rejection region can have small holes near its lower end. In
    /// that case the lower end of the last rejecting interval is returned.
    /// Without common random numbers a hole is reported as an error.
    pub fn minimal_threshold(&self, alpha: f64, search: &SearchConfig) -> Result<f64> {
        check_boot_alpha(alpha)?;
        let stat = self.fit.beta_hat.amax();
        let reject = |d: f64| -> Result<bool> { Ok(stat < self.critical_value(d, alpha)?) };
        if reject(stat)? {
            return Ok(0.0);
        }
        let scale = self.chol_tt.diagonal().amax() / (self.fit.n as f64).sqrt();
        let start = stat + stat.max(scale);
        if self.cfg.common_random_numbers {
            upper_interval_threshold(reject, stat, start, search)
        } else {
            bisect_minimal_threshold(reject, stat, start, search)
        }
    }
}

fn check_boot_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(Error::validation(format!("bootstrap tests need alpha in (0, 0.5), got {alpha}")))
    }
}

/// One-shot bootstrap test of `||beta||_inf >= delta`.
pub fn bootstrap_max_test(fit: &PretrendFit, delta: f64, alpha: f64, cfg: &BootstrapConfig) -> Result<TestResult> {
    BootstrapEngine::new(fit, *cfg)?.test(delta, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{fit_pretrend, PanelDataset, TwfeDesign};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn panel(n: usize, periods: usize, seed: u64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(n, periods, |_, _| rng.sample::<f64, _>(StandardNormal));
        PanelDataset::canonical(y, (0..n).map(|i| i % 2 == 0).collect(), periods - 1).unwrap()
    }

    fn cfg(variant: BootstrapVariant) -> BootstrapConfig {
        BootstrapConfig { b: 600, variant, seed: 11, exec: Execution::Sequential, common_random_numbers: true }
    }

    #[test]
    fn wild_lookup_matches_explicit_refits() {
        let ds = panel(21, 4, 3);
        let fit = fit_pretrend(&ds).unwrap();
        let engine = BootstrapEngine::new(&fit, cfg(BootstrapVariant::WildCluster)).unwrap();
        let delta = 2.0 * fit.beta_hat.amax();
        let (centre, full) = engine.centre(delta).unwrap();
        let tables = engine.sign_tables(&full);
        let u = fit.residuals_at(&full);
        let Some(Draws::Signs(signs)) = &engine.draws else { panic!("wild draws") };
        let design = TwfeDesign::pretrend(&ds).unwrap();
        let all: Vec<usize> = (0..21).collect();
        let dm = design.demean(&all).unwrap();
        for k in 0..5 {
            // Rebuild the bootstrap outcome cell by cell and refit by OLS.
            let fitted = &dm.ddw * &full;
            let y_star = DMatrix::from_fn(21, 4, |i, t| {
                let r = if signs[k][i / 8] >> (i % 8) & 1 == 1 { 1.0 } else { -1.0 };
                fitted[i * 4 + t] + r * u[(i, t)]
            });
            let refit =
                TwfeDesign::new(y_star, design.columns().to_vec(), design.labels().to_vec(), design.tested().to_vec())
                    .unwrap()
                    .fit()
                    .unwrap();
            let mut acc = centre.clone();
            for (block, &byte) in signs[k].iter().enumerate() {
                for j in 0..3 {
                    acc[j] += tables[(block * 256 + byte as usize) * 3 + j];
                }
            }
            assert!((refit.beta_hat - acc).amax() < 1e-10);
        }
    }

    #[test]
    fn gaussian_draws_match_cell_level_covariance() {
        // Cell-level iid errors pushed through the OLS map have covariance
        // s2 (G^-1) / n, which is what the engine samples from.
        let ds = panel(30, 3, 9);
        let fit = fit_pretrend(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reps = 20_000;
        let (n, p) = (fit.n, fit.periods);
        let mut second = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..reps {
            let e = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let s = fit.unit_scores(&e).row_sum().transpose() / n as f64;
            let b = &fit.gram_inv * s;
            second += &b * b.transpose() / reps as f64;
        }
        let target = &fit.gram_inv / n as f64;
        assert!((second - &target).amax() < 0.05 * target.amax());
    }

    #[test]
    fn results_do_not_depend_on_execution() {
        let fit = fit_pretrend(&panel(50, 4, 2)).unwrap();
        for variant in [BootstrapVariant::Gaussian, BootstrapVariant::WildCluster] {
            let mut c = cfg(variant);
            let a = bootstrap_max_test(&fit, 0.5, 0.05, &c).unwrap();
            c.exec = Execution::Parallel;
            let b = bootstrap_max_test(&fit, 0.5, 0.05, &c).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn minimal_threshold_brackets_decision() {
        let fit = fit_pretrend(&panel(60, 4, 5)).unwrap();
        let search = SearchConfig::default();
        for variant in [BootstrapVariant::Gaussian, BootstrapVariant::WildCluster] {
            let engine = BootstrapEngine::new(&fit, cfg(variant)).unwrap();
            let d = engine.minimal_threshold(0.05, &search).unwrap();
            assert!(engine.test(d, 0.05).unwrap().reject);
            assert!(engine.test(d + 1e-4, 0.05).unwrap().reject);
            assert!(!engine.test(d - 1e-4, 0.05).unwrap().reject);
        }
    }

    #[test]
    fn preconditions() {
        let fit = fit_pretrend(&panel(20, 3, 1)).unwrap();
        let mut c = cfg(BootstrapVariant::Gaussian);
        assert!(bootstrap_max_test(&fit, 1.0, 0.5, &c).is_err());
        c.b = 100;
        assert!(bootstrap_max_test(&fit, 1.0, 0.05, &c).is_err());
    }
}
