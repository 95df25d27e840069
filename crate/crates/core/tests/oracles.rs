//! Fits and covariances against dense dummy-variable regressions.

mod common;

use common::{lsdv, max_abs_diff, placebo_columns, random_panel, triple_loop_sandwich};
use eqtrends::covariance::cluster_robust_cov;
use eqtrends::exec::stream_rng;
use eqtrends::panel::{fit_pretrend, Cohort, PanelDataset};
use eqtrends::staggered::{build_staggered_design, StaggeredOptions};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn canonical_fit_matches_lsdv() {
    for case in 0..40u64 {
        let mut rng = stream_rng(11, case);
        let t = rng.random_range(1..=4);
        let n = rng.random_range(t + 3..=10);
        let ds = random_panel(&mut rng, n, t);
        let fit = fit_pretrend(&ds).unwrap();
        let cols = placebo_columns(ds.treated().unwrap(), t + 1);
        let oracle = lsdv(ds.outcomes(), &cols);
        let diff = (&fit.beta_hat - &oracle.coef).abs().max();
        assert!(diff < 1e-8, "case {case}: n={n} T={t} diff {diff}");
        assert!(max_abs_diff(&fit.residuals, &oracle.residuals) < 1e-8);

        let cov = cluster_robust_cov(&fit).unwrap();
        let sandwich = triple_loop_sandwich(&oracle, &(0..t).collect::<Vec<_>>());
        let scale = sandwich.abs().max().max(1.0);
        assert!(max_abs_diff(&cov.sigma_hat, &sandwich) < 1e-10 * scale, "case {case}");
    }
}

#[test]
fn cluster_covariance_ignores_unit_order() {
    let mut rng = stream_rng(12, 0);
    let ds = random_panel(&mut rng, 25, 3);
    let base = cluster_robust_cov(&fit_pretrend(&ds).unwrap()).unwrap();
    let order: Vec<usize> = (0..25).rev().collect();
    let permuted = cluster_robust_cov(&fit_pretrend(&ds.permute_units(&order).unwrap()).unwrap()).unwrap();
    assert!(max_abs_diff(&base.sigma_hat, &permuted.sigma_hat) < 1e-12);
}

/// Staggered panel with cohorts {4, 5, never} over six periods and one
/// covariate; outcomes are pure noise.
fn staggered_panel(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> PanelDataset {
    let cohorts: Vec<Cohort> = (0..n).map(|i| [Cohort::Adopts(3), Cohort::Adopts(4), Cohort::Never][i % 3]).collect();
    let y = DMatrix::from_fn(n, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    PanelDataset::staggered(y, cohorts, Some((x, vec!["x".into()]))).unwrap()
}

#[test]
fn staggered_fit_matches_lsdv_with_explicit_columns() {
    for case in 0..10u64 {
        let mut rng = stream_rng(13, case);
        let ds = staggered_panel(&mut rng, 30);
        for full_window in [false, true] {
            let sd = build_staggered_design(&ds, &StaggeredOptions { full_window, ..Default::default() }).unwrap();
            let fit = sd.fit().unwrap();
            let design = sd.design();
            let oracle = lsdv(design.outcomes(), design.columns());
            let coef_diff = (&fit.coef - &oracle.coef).abs().max();
            assert!(coef_diff < 1e-8, "case {case}: {coef_diff}");
            let sandwich = triple_loop_sandwich(&oracle, design.tested());
            let cov = sd.covariance(&fit).unwrap();
            assert!(max_abs_diff(&cov.sigma_hat, &sandwich) < 1e-10 * sandwich.abs().max().max(1.0));
        }
    }
}

#[test]
fn centred_covariates_are_mean_zero_and_shift_invariant() {
    let mut rng = stream_rng(14, 0);
    let ds = staggered_panel(&mut rng, 45);
    let sd = build_staggered_design(&ds, &StaggeredOptions::default()).unwrap();
    let xc = sd.centered_covariates().unwrap();
    let cohorts = ds.cohorts().unwrap();
    for c in [Cohort::Adopts(3), Cohort::Adopts(4)] {
        let members: Vec<usize> = (0..45).filter(|&i| cohorts[i] == c).collect();
        let mean = members.iter().map(|&i| xc[(i, 0)]).sum::<f64>() / members.len() as f64;
        assert!(mean.abs() < 1e-12);
    }
    // A common shift of the covariate is absorbed by the time effects.
    let shifted = ds.covariates().unwrap().map(|v| v + 3.5);
    let again =
        PanelDataset::staggered(ds.outcomes().clone(), cohorts.to_vec(), Some((shifted, vec!["x".into()]))).unwrap();
    let sd2 = build_staggered_design(&again, &StaggeredOptions::default()).unwrap();
    let xc2 = sd2.centered_covariates().unwrap();
    for i in (0..45).filter(|&i| cohorts[i] != Cohort::Never) {
        assert!((xc2[(i, 0)] - xc[(i, 0)]).abs() < 1e-12);
    }
    let (a, b) = (sd.fit().unwrap(), sd2.fit().unwrap());
    assert!((&a.beta_hat - &b.beta_hat).abs().max() < 1e-10);
}
